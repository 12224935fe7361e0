"""Published JSON schemas for CLI outputs and the Monte Carlo run config.

``schema_version`` is bumped on any breaking change to these documents.
"""

SCHEMA_VERSION = 1

_NUMBER_OR_NULL = {"type": ["number", "null"]}

FIT_OUTPUT = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": [
        "schema_version", "command", "method", "variance", "a_G", "coefficients",
        "contrast", "estimate", "std_error", "t_statistic", "level", "normal_ci",
        "subsampling", "seed",
    ],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"const": "fit"},
        "method": {"enum": ["ols", "sacr"]},
        "variance": {"enum": ["cr", "cr_jack", "sacr", "sacr_jack"]},
        "a_G": {"type": "number"},
        "coefficients": {"type": "object", "additionalProperties": {"type": "number"}},
        "contrast": {
            "type": "object",
            "required": ["label", "r", "delta_null"],
            "properties": {
                "label": {"type": "string"},
                "r": {"type": "array", "items": {"type": "number"}},
                "delta_null": {"type": "number"},
            },
        },
        "estimate": {"type": "number"},
        "std_error": {"type": "number"},
        "t_statistic": {"type": "number"},
        "level": {"type": "number"},
        "normal_ci": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "subsampling": {
            "type": ["object", "null"],
            "required": ["b", "M", "seed", "ci"],
            "properties": {
                "b": {"type": "integer"},
                "M": {"type": "integer"},
                "seed": {"type": "integer"},
                "ci": {"type": "array", "items": {"type": "number"}},
            },
        },
        "seed": {"type": "integer"},
    },
}

DIAGNOSE_OUTPUT = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": [
        "schema_version", "command", "contrast", "alpha_hat", "p_hat",
        "k_fraction", "level", "reject_alpha2", "note",
    ],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"const": "diagnose"},
        "contrast": {"type": "string"},
        "alpha_hat": {"type": "number"},
        "p_hat": {"type": "number"},
        "k_fraction": {"type": "number"},
        "level": {"type": "number"},
        "reject_alpha2": {"type": "boolean"},
        "note": {"type": "string"},
    },
}

SUBSAMPLE_OUTPUT = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": [
        "schema_version", "command", "contrast", "estimate", "std_error",
        "t_statistic", "b", "M", "n_degenerate", "enumerated", "level",
        "critical_values", "ci", "volatility_table", "seed",
    ],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"const": "subsample"},
        "contrast": {"type": "string"},
        "estimate": {"type": "number"},
        "std_error": {"type": "number"},
        "t_statistic": {"type": "number"},
        "b": {"type": "integer"},
        "M": {"type": "integer"},
        "n_degenerate": {"type": "integer"},
        "enumerated": {"type": "boolean"},
        "level": {"type": "number"},
        "critical_values": {
            "type": "object",
            "required": ["lower", "upper"],
            "properties": {"lower": {"type": "number"}, "upper": {"type": "number"}},
        },
        "ci": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "volatility_table": {
            "type": ["array", "null"],
            "items": {
                "type": "array",
                "items": [{"type": "integer"}, {"type": "number"}],
            },
        },
        "seed": {"type": "integer"},
    },
}

LIMITDIST_OUTPUT = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": [
        "schema_version", "command", "alpha", "p", "n", "truncation_K", "seed",
        "out", "size_at", "size",
    ],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"const": "limitdist"},
        "alpha": {"type": "number"},
        "p": {"type": "number"},
        "n": {"type": "integer"},
        "truncation_K": {"type": "integer"},
        "seed": {"type": "integer"},
        "out": {"type": ["string", "null"]},
        "size_at": _NUMBER_OR_NULL,
        "size": _NUMBER_OR_NULL,
    },
}

MONTECARLO_REPORT = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["schema_version", "meta", "rows"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "meta": {
            "type": "object",
            "required": [
                "replications", "level", "seed", "methods", "dgp", "settings",
                "giant_cluster_events", "failed_replications",
            ],
        },
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "method", "coverage", "rejection", "mse",
                    "n_evaluated", "n_degenerate",
                ],
            },
        },
    },
}

RUN_CONFIG = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["schema_version", "dgp", "methods", "replications", "seed"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "dgp": {
            "type": "object",
            "required": ["G", "alpha"],
        },
        "methods": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "replications": {"type": "integer", "minimum": 1},
        "level": {"type": "number"},
        "seed": {"type": "integer"},
        "settings": {"type": "object"},
        "output_prefix": {"type": "string"},
    },
}

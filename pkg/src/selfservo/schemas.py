"""JSON Schemas (draft 2020-12) for every file the command line writes."""

_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_VEC3_OR_NULL = {"type": ["array", "null"], "items": _NUM, "minItems": 3, "maxItems": 3}
_GOAL = {"type": "array", "items": _NUM_OR_NULL, "minItems": 3, "maxItems": 3}

BINDING = {
    "type": "object",
    "required": ["id", "arm", "link", "offset"],
    "properties": {
        "id": {"type": "integer"},
        "arm": {"type": ["integer", "null"]},
        "link": {"type": ["integer", "null"]},
        "offset": _VEC3,
    },
}

LOG_HEADER = {
    "type": "object",
    "required": ["type", "config", "seed", "d", "n_actions", "action_scale", "controlled_arm", "bindings"],
    "properties": {
        "type": {"const": "header"},
        "config": {"type": "object", "required": ["arms", "camera", "tracker"]},
        "seed": {"type": "integer"},
        "d": {"type": "integer", "minimum": 1},
        "n_actions": {"type": "integer", "minimum": 1},
        "action_scale": _NUM,
        "controlled_arm": {"type": "integer", "minimum": 0},
        "bindings": {"type": "array", "items": BINDING},
    },
}

LOG_STEP = {
    "type": "object",
    "required": ["t", "action", "arm_actions", "obs", "gt_ee", "gt_ee_world", "joints", "shake"],
    "properties": {
        "t": {"type": "integer", "minimum": 0},
        "action": {"type": ["array", "null"], "items": _NUM},
        "arm_actions": {"type": ["object", "null"], "additionalProperties": {"type": "array", "items": _NUM}},
        "obs": {"type": "array", "items": _VEC3_OR_NULL},
        "gt_ee": _VEC3,
        "gt_ee_world": _VEC3,
        "joints": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "shake": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
    },
}

REPORT = {
    "type": "object",
    "required": ["scores", "ranking", "mrcp", "body", "low_confidence", "stage", "config", "seed", "bindings"],
    "properties": {
        "scores": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "ranking": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "mrcp": {
            "type": "object",
            "required": ["members", "position"],
            "properties": {
                "members": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "position": _VEC3,
                "member_positions": {"type": ["array", "null"], "items": _VEC3},
            },
        },
        "body": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "low_confidence": {"type": "boolean"},
        "stage": {"enum": [1, 2]},
        "config": {"type": "object", "required": ["noise_variance", "top_k", "stages"]},
        "seed": {"type": "integer"},
        "bindings": {"type": "array", "items": BINDING},
    },
}

TRACE_RECORD = {
    "type": "object",
    "required": ["seed", "t", "s_star", "goal", "action", "distance_px", "gt_error_cm", "reinit"],
    "properties": {
        "seed": {"type": "integer"},
        "goal_index": {"type": "integer", "minimum": 0},
        "waypoint_index": {"type": "integer", "minimum": 0},
        "t": {"type": "integer", "minimum": 1},
        "s_star": _VEC3,
        "goal": _GOAL,
        "action": {"type": "array", "items": _NUM, "minItems": 1},
        "distance_px": {"type": "number", "minimum": 0},
        "gt_error_cm": _NUM_OR_NULL,
        "reinit": {"type": "boolean"},
    },
}

_OUTCOME = {
    "type": "object",
    "required": ["steps", "early_terminated", "error_px", "error_cm", "reinits", "status"],
    "properties": {
        "steps": {"type": "integer", "minimum": 0},
        "early_terminated": {"type": "boolean"},
        "error_px": _NUM_OR_NULL,
        "error_cm": _NUM_OR_NULL,
        "reinits": {"type": "integer", "minimum": 0},
        "status": {"enum": ["ok", "lost"]},
    },
}

SERVO_SUMMARY = {
    "type": "object",
    "required": ["median_error_cm", "etr_percent", "status", "per_seed"],
    "properties": {
        "median_error_cm": _NUM_OR_NULL,
        "etr_percent": {"type": "number", "minimum": 0, "maximum": 100},
        "status": {"enum": ["ok", "lost"]},
        "per_seed": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["seed", "median_error_cm", "etr_percent", "outcomes"],
                "properties": {"outcomes": {"type": "array", "items": _OUTCOME}},
            },
        },
    },
}

PATH_SUMMARY = {
    "type": "object",
    "required": ["reached_fraction", "status", "per_seed"],
    "properties": {
        "reached_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "status": {"enum": ["ok", "lost"]},
        "per_seed": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["seed", "waypoints", "path", "reached_fraction", "status", "outcomes"],
                "properties": {
                    "waypoints": {"type": "array", "items": _GOAL},
                    "path": {"type": "array", "items": _VEC3_OR_NULL},
                    "outcomes": {"type": "array", "items": _OUTCOME},
                },
            },
        },
    },
}

BENCH_SUMMARY = {
    "type": "object",
    "required": ["cells", "seeds", "summary"],
    "properties": {
        "cells": {"type": "array", "items": {"type": "object", "required": ["setting", "family"]}},
        "seeds": {"type": "array", "items": {"type": "integer"}},
        "summary": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["family", "n", "failures", "success_rate", "error_px_mean", "error_px_std",
                             "error_cm_mean", "error_cm_std", "pr_area_mean", "pr_area_std"],
            },
        },
    },
}

PR_CURVES = {
    "type": "object",
    "additionalProperties": {
        "type": "array",
        "minItems": 2,
        "maxItems": 2,
        "items": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
    },
}

RUN_CONFIG = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "world": {"type": "object"},
        "selfrec": {"type": "object"},
        "servo": {"type": "object"},
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "n_actions": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "bench": {"type": ["object", "null"]},
    },
}

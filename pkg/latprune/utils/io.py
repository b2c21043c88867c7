import json
import sys

from ..exceptions import PlannerIOError


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def read_json(path, invalid):
    """Parse a JSON file; a syntax error raises `invalid`"""
    try:
        with open(path, encoding="utf-8", mode="r") as f:
            return json.load(f)
    except OSError as e:
        raise PlannerIOError("Could not read {}: {}".format(path, e)) from e
    except ValueError as e:
        raise invalid("{} is not valid JSON: {}".format(path, e)) from e


def write_text(text, path=None):
    """Write to `path`, or to standard output when no path is given"""
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        with open(path, encoding="utf-8", mode="w", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise PlannerIOError("Could not write {}: {}".format(path, e)) from e


def write_json(obj, path=None):
    write_text(dumps(obj), path)


def read_lines(path):
    try:
        with open(path, encoding="utf-8", mode="r") as f:
            return f.read().splitlines()
    except OSError as e:
        raise PlannerIOError("Could not read {}: {}".format(path, e)) from e

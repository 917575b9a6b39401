"""
Find the directory where experiment outputs are stored.
"""
import os
import os.path as op

__all__ = [
    "RUN_DIR_VARIABLE",
    "MANIFEST_NAME",
    "get_run_directory",
    "output_path",
]

# the environment variable naming the default output root
RUN_DIR_VARIABLE = "JERKGRPO_RUN_DIR"

# every output directory gets one of these
MANIFEST_NAME = "manifest.json"


def get_run_directory() -> str:
    """
    Return the directory where experiment outputs are stored.

    If JERKGRPO_RUN_DIR is defined, use that. Otherwise,
    use the current directory.

    Returns
    -------
    directory: str
        The default output root.
    """
    # the directory pointed to by the ENV VAR
    envdir = os.getenv(RUN_DIR_VARIABLE)

    # if it's defined, use that. Else the CWD.
    return envdir if envdir else os.getcwd()


def output_path(path: str) -> str:
    """
    Resolve a relative output path against the run directory.
    """
    return path if op.isabs(path) else op.join(get_run_directory(), path)

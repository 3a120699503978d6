"""
Module for caching CLI test and lower-bound results.
This prevents re-running an expensive optimization on unchanged inputs.
"""

import os
import json
import hashlib
import time

from config import OUTPUT_DIR

# Path for the run cache file
CACHE_FILE = OUTPUT_DIR / "run_cache.json"


def file_digest(path):
    """md5 of a file's content, read in chunks."""
    digest = hashlib.md5()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def generate_run_id(command, input_paths, run_params):
    """
    Generate a unique ID for a run based on its input files and parameters.

    Args:
        command: CLI sub-command name
        input_paths: Paths of the input files
        run_params: Dictionary of run parameters (must be JSON serializable)

    Returns:
        str: Unique run ID
    """
    # Content hashes, not mtimes: regenerated files with equal bytes hit the cache
    inputs = [file_digest(p) for p in input_paths if p]
    params_str = json.dumps(run_params, sort_keys=True, default=str)
    hash_input = f"{command}:{':'.join(inputs)}:{params_str}"
    return hashlib.md5(hash_input.encode()).hexdigest()


def _to_builtin(value):
    return value.tolist() if hasattr(value, 'tolist') else str(value)


def load_cache():
    """Load the run cache from disk."""
    if os.path.exists(CACHE_FILE):
        try:
            with open(CACHE_FILE, 'r') as f:
                return json.load(f)
        except json.JSONDecodeError:
            print(f"Warning: Cache file {CACHE_FILE} is corrupted. Creating a new one.")
            return {}
    else:
        os.makedirs(os.path.dirname(CACHE_FILE), exist_ok=True)
        return {}


def save_cache(cache):
    """Save the run cache to disk."""
    os.makedirs(os.path.dirname(CACHE_FILE), exist_ok=True)
    with open(CACHE_FILE, 'w') as f:
        json.dump(cache, f, indent=2, sort_keys=True, default=_to_builtin)


def get_cached_run(command, input_paths, run_params):
    """
    Check if a run has already been done on the same inputs with the same parameters.

    Returns:
        dict or None: The cached result, or None if not found
    """
    run_id = generate_run_id(command, input_paths, run_params)
    entry = load_cache().get(run_id)
    return entry['result'] if entry else None


def cache_run_result(command, input_paths, run_params, result):
    """Add a run result to the cache."""
    run_id = generate_run_id(command, input_paths, run_params)
    cache = load_cache()
    cache[run_id] = {
        'command': command,
        'input_paths': [str(p) for p in input_paths if p],
        'run_params': run_params,
        'result': result,
        'process_date': time.time(),
    }
    save_cache(cache)


def clear_cache(older_than_days=None):
    """
    Clear the cache, optionally only removing entries older than a certain number of days.

    Args:
        older_than_days: If provided, only clear entries older than this many days

    Returns:
        int: Number of entries removed
    """
    cache = load_cache()
    if older_than_days is None:
        save_cache({})
        return len(cache)

    cutoff_time = time.time() - (older_than_days * 24 * 60 * 60)
    new_cache = {
        k: v for k, v in cache.items()
        if 'process_date' not in v or v['process_date'] > cutoff_time
    }
    save_cache(new_cache)
    print(f"Cleared {len(cache) - len(new_cache)} cache entries older than {older_than_days} days")
    return len(cache) - len(new_cache)

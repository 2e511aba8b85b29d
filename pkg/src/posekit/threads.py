import os


def worker_count():
    """Worker threads to use; ``POSEKIT_THREADS`` caps the CPU count."""
    n = os.cpu_count() or 1
    cap = os.environ.get("POSEKIT_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n

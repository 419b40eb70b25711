import json
import logging
import os

import pandas as pd

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(app_log_path, sim_log_path, train_log_path, level=logging.INFO):
    """
    Sets up logging for the application.
    Simulation and training chatter go to their own files and stay out of the root log.
    """
    os.makedirs(os.path.dirname(app_log_path) or ".", exist_ok=True)

    logging.basicConfig(
        level=level,
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(app_log_path),
            logging.StreamHandler()  # Output to console as well
        ]
    )

    sim_logger = logging.getLogger("Simulation")
    sim_logger.setLevel(level)
    sim_handler = logging.FileHandler(sim_log_path)
    sim_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    sim_logger.addHandler(sim_handler)
    sim_logger.propagate = False

    train_logger = logging.getLogger("Training")
    train_logger.setLevel(level)
    train_handler = logging.FileHandler(train_log_path)
    train_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    train_logger.addHandler(train_handler)
    train_logger.propagate = False

    logging.info("Logging setup complete.")


def write_csv(frame: pd.DataFrame, path, float_format="%.10g"):
    """
    Writes a DataFrame as CSV with a fixed float format so that repeated runs with
    the same seed produce byte-identical files.
    """
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    frame.to_csv(path, index=False, float_format=float_format, lineterminator="\n")


def write_json(data, path):
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    with open(path, 'r') as f:
        return json.load(f)


def parallel_map(func, jobs, workers=1, chunksize=1):
    """
    Maps `func` over `jobs`, in a process pool when workers > 1.
    Results keep the job order, so reductions over them are deterministic.
    """
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [func(job) for job in jobs]
    from multiprocessing import Pool
    with Pool(processes=workers) as pool:
        return pool.map(func, jobs, chunksize=chunksize)

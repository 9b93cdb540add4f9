"""Training, evaluation, sweeps and the command line."""

"""Training, benchmark and analysis services."""
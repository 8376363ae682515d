"""Static debias bench: two-stream training, synthetic bias benchmark and run browser."""

"""Vehicle model, feedback linearization, Riccati/QP numerics and trajectory planning."""

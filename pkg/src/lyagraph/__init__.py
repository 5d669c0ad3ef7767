"""Sequential feedback motion planning with RL node controllers and
neural Lyapunov region-of-attraction certificates."""

__version__ = "0.1.0"

from seedflood._seedflood import *  # noqa: F401,F403

"""pid-twin — P&ID topology extraction for building energy systems.

Turns rasterized piping & instrumentation diagrams into a graph of technical
building equipment (pumps, valves, heat exchangers, flaps) and the pipes
joining them, then exports that graph as a digital-twin skeleton: Brick-style
Turtle, BUDO-style labels and a canonical Topology JSON.
"""

__version__ = "1.0.0"

"""INDI cascaded control of a quadcopter with H-infinity shaped virtual
controls: linear systems, synthesis, vehicle model, INDI runtime, analysis,
simulation and identification."""

__version__ = "0.1.0"

"""Shipped presets, weights, scenarios and controllers."""

"""Coupled Cosserat-rod simulation of tendon-driven catheters."""

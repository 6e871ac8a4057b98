"""Mixture generation: content from one image domain, style from another."""

"""
Numerical, protocol and experiment modules of the X-VFL Simulator
"""

#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
X-VFL Simulator

Desk-scale vertical federated learning with feature completion, decision
subspace alignment and SGD/PAGE training loops.
"""

__version__ = "0.1.0"

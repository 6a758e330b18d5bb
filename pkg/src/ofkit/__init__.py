"""Desk-scale model of Samsung's Offline Finding protocols (Find My Mobile and
Galaxy SmartTag): codecs, key schedule, authenticated GATT sessions, a
simulated location network with attack scenarios, and a tracker detector."""

__version__ = "0.1.0"

"""Driven two-atom cavity QED with van der Waals interaction."""

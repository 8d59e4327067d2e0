"""Test suite for reft-sim."""

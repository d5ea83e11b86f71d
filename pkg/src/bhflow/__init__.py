"""Dataflow Barnes-Hut: task engine, octree, force stage and drivers."""

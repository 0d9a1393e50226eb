"""
Test package for AI Multi-Agent Content Creation Pipeline
""" 
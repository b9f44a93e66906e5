"""
Models module for the CyclicPrompt restoration framework.
"""

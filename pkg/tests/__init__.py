"""
Test Suite for Fintech AI System
"""

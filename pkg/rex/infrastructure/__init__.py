"""Artifact persistence"""

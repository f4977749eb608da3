"""Grapheme CTC Toolkit - Source Package"""

"""Losses Package for ocverify"""

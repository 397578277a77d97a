"""Helper functions shared by the whole package"""

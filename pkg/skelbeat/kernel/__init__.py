"""Numerical core: autodiff, skeleton data, models, samplers, trainers,
attacks and metrics"""

"""Reinforcement-learning operation of the plant: a branching discrete
policy trained with a self-contained PPO implementation."""

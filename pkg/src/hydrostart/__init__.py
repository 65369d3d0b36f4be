"""Active-learning optimization of hydro turbine startups."""

# Calculations module

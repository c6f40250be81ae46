# Volterra Control Toolkit - src package

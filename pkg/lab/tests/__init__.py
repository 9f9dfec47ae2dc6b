# Tests package for the tube concentration lab

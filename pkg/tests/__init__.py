# Tests package for the credit fusion framework

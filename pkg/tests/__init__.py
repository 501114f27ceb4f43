# Tests package for Backend Integration AI
# Test package for the cryo-spdc toolkit

# Command handlers package
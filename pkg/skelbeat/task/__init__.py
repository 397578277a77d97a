"""Package containing the tasks of the command line stages"""

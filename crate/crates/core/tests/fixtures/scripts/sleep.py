import time

time.sleep(5)


def savefig(path):
    pass

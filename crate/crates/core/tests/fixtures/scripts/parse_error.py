import os
open(os.path.join(os.environ.get("FRAMES_DIR", "."), "ran.txt"), "w").write("executed")
def broken(:
    pass

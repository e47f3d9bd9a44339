from . import mpc
from . import learning
from . import privacy
from . import utils
from . import cli

def main():
    print("PPCL (Privacy-Preserving Collaborative Learning)")

if __name__ == "__main__":
    main()

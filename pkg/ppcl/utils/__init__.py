from . import constants
from . import io_utils

def main():
    print("PPCL - Utilities")


if __name__ == "__main__":
    main()

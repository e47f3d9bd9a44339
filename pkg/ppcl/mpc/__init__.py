from . import ring_fixed
from . import transport
from . import shares
from . import dealer
from . import session

def main():
    print("PPCL - Secure Computation")


if __name__ == "__main__":
    main()

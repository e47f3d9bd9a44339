from . import tensor_nn
from . import datasets
from . import protocols

def main():
    print("PPCL - Learning")


if __name__ == "__main__":
    main()

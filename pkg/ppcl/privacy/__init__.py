from . import attacks

def main():
    print("PPCL - Privacy Evaluation")


if __name__ == "__main__":
    main()

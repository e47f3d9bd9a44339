from . import cli_experiments

def main():
    print("PPCL - Command Line Interfaces")


if __name__ == "__main__":
    main()

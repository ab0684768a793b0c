"""Main entry point for the cryo_spdc module."""

from .cli import main

if __name__ == "__main__":
    main()

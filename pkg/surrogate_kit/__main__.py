from .surrogate import main

main()

from reflectool.cli import main

main()

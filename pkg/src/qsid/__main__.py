from qsid.cli import main

main()

# Launcher for running the toolkit from a source checkout:
#
#     python runepiforge.py simulate --config scenarios/desk.scenario --out runs/sim

if __name__ == '__main__':
    from epiforge.cli import main
    main()

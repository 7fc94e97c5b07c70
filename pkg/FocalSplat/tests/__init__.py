# FocalSplat unit tests; run with
#   python -m unittest discover -s FocalSplat/tests -p '*_tests.py' -t .

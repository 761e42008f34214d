namespace gridvla {}

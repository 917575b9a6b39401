import jerkgrpo


def test_jerkgrpo() -> None:
    """
    Check that the version number is correct.
    """
    assert jerkgrpo.__version__ == "0.1.0"

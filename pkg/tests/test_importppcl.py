import pytest

def test_import_ppcl():
    import ppcl
    assert ppcl.mpc.session.MPCSession
    assert ppcl.learning.protocols.run_scenario
    assert ppcl.privacy.attacks.run_privacy_experiment
    assert ppcl.cli.cli_experiments.main


def test_subpackage_banners(capsys):
    import ppcl
    for module, banner in ((ppcl, "PPCL (Privacy-Preserving Collaborative Learning)"),
                           (ppcl.mpc, "PPCL - Secure Computation"),
                           (ppcl.learning, "PPCL - Learning"),
                           (ppcl.privacy, "PPCL - Privacy Evaluation"),
                           (ppcl.utils, "PPCL - Utilities"),
                           (ppcl.cli, "PPCL - Command Line Interfaces")):
        module.main()
        assert capsys.readouterr().out.strip() == banner

from pathlib import Path

import pytest

from sdvpipe import regdoc
from sdvpipe.instance import parse_instance
from sdvpipe.metamodel import parse_plantuml

DATA_DIR = Path(__file__).parent / "data"


def data_text(name: str) -> str:
    return (DATA_DIR / name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def minireg_text() -> str:
    return data_text("minireg.txt")


@pytest.fixture()
def doc(minireg_text):
    return regdoc.parse_document(minireg_text)


@pytest.fixture()
def graph(doc):
    return regdoc.build_reference_graph(doc)


@pytest.fixture(scope="session")
def plantuml_text() -> str:
    return data_text("vehicle.plantuml")


@pytest.fixture()
def vehicle_mm(plantuml_text):
    return parse_plantuml(plantuml_text)


@pytest.fixture(scope="session")
def instance_text() -> str:
    return data_text("instance.xmi")


@pytest.fixture()
def vehicle_inst(instance_text, vehicle_mm):
    return parse_instance(instance_text, vehicle_mm)


@pytest.fixture(scope="session")
def scenario_text() -> str:
    return data_text("scenario_aebs.scn")


@pytest.fixture(scope="session")
def catalog_text() -> str:
    return data_text("vss.catalog")

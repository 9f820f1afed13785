"""
Tests de validation de la structure du projet
Tests qui ne nécessitent pas les dépendances externes
"""

import ast
from pathlib import Path

import pytest
import yaml


PROJECT_ROOT = Path(__file__).parent.parent


def test_project_structure():
    """Vérifie que la structure du projet est correcte"""
    for directory in ("core", "core/factories", "layers", "model", "optim", "prune", "analysis", "data", "config"):
        assert (PROJECT_ROOT / "csnet" / directory).exists(), directory

    assert (PROJECT_ROOT / "config.yaml").exists()
    assert (PROJECT_ROOT / "requirements.txt").exists()
    assert (PROJECT_ROOT / "README.md").exists()
    assert (PROJECT_ROOT / "DESIGN.md").exists()

    # Point d'entrée
    assert (PROJECT_ROOT / "run_csnet.py").exists()
    assert (PROJECT_ROOT / "csnet" / "main.py").exists()


def test_python_files_syntax():
    """Vérifie que tous les fichiers Python ont une syntaxe valide"""
    errors = []
    for py_file in list((PROJECT_ROOT / "csnet").glob("**/*.py")) + [PROJECT_ROOT / "run_csnet.py"]:
        try:
            ast.parse(py_file.read_text(encoding="utf-8"))
        except SyntaxError as e:
            errors.append(f"{py_file}: {e}")

    if errors:
        pytest.fail("Erreurs de syntaxe trouvées:\n" + "\n".join(errors))


def test_init_files_present():
    """Vérifie que tous les packages ont des fichiers __init__.py"""
    missing = [
        str(directory) for directory in (PROJECT_ROOT / "csnet").glob("**")
        if directory.is_dir() and directory.name != "__pycache__" and not (directory / "__init__.py").exists()
    ]
    if missing:
        pytest.fail("Fichiers __init__.py manquants:\n" + "\n".join(missing))


def test_config_file_structure():
    """Vérifie la structure du fichier de configuration"""
    with open(PROJECT_ROOT / "config.yaml", 'r', encoding='utf-8') as f:
        config = yaml.safe_load(f)

    for section in ('model', 'train', 'decay', 'prune', 'data', 'analysis', 'logging'):
        assert section in config, section
    assert config['train']['batch_size'] == 24
    assert config['train']['epochs'] == 300
    assert config['decay']['lambda_dyn'] == 3.0
    assert config['prune']['tau'] == 1e-6


def test_requirements_file():
    """Vérifie que le fichier requirements.txt est bien formé"""
    lines = (PROJECT_ROOT / "requirements.txt").read_text(encoding="utf-8").splitlines()
    packages = [line.strip() for line in lines if line.strip() and not line.strip().startswith('#')]

    assert len(packages) > 0, "Le fichier requirements.txt est vide"
    for pkg in ('numpy', 'scipy', 'Pillow', 'pydantic', 'pyyaml', 'python-dotenv', 'click', 'pytest'):
        assert pkg in packages, f"Package essentiel manquant: {pkg}"


def test_documentation_files():
    """Vérifie que les fichiers de documentation existent et ne sont pas vides"""
    for doc_file, min_size in (("README.md", 1000), ("DESIGN.md", 2000)):
        doc_path = PROJECT_ROOT / doc_file
        assert doc_path.exists(), f"Fichier de documentation manquant: {doc_file}"
        content = doc_path.read_text(encoding='utf-8')
        assert len(content) >= min_size, f"Fichier {doc_file} trop court ({len(content)} < {min_size} caractères)"


if __name__ == '__main__':
    pytest.main([__file__])

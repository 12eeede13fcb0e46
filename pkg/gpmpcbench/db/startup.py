"""Database creation"""

import logging
import os

from . import _base as db
from .version import DatabaseVersion

def create_database_file(path):
    """Generate a fresh results database at path, replacing any old one"""
    if os.path.exists(path):
        os.remove(path)
    engine, session_factory = db.open_database(path)
    db.ResultsBase.metadata.create_all(engine)

    with session_factory() as session:
        session.add(DatabaseVersion())
        session.commit()
    logging.info("Created results database '%s'", path)
    return session_factory
